#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace colearn {

/// Writes `content` to a sibling temp file, then renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// Fixed formatting for numeric CSV cells (locale independent, %.10g).
std::string format_number(double value);

class CsvWriter {
public:
    class Row {
    public:
        explicit Row(std::string& out) : out_(out) {}
        Row(const Row&) = delete;
        ~Row() { out_ += '\n'; }

        template <typename T>
        Row& num(T value) {
            sep();
            if constexpr (std::is_integral_v<T>)
                out_ += std::to_string(value);
            else
                out_ += format_number(static_cast<double>(value));
            return *this;
        }

        Row& str(std::string_view value);

    private:
        void sep() {
            if (!first_) out_ += ',';
            first_ = false;
        }
        std::string& out_;
        bool first_ = true;
    };

    void header(const std::vector<std::string>& columns);
    Row row() { return Row(text_); }
    const std::string& text() const { return text_; }
    void save(const std::filesystem::path& path) const { atomic_write(path, text_); }

private:
    std::string text_;
};

/// Minimal reader for the files CsvWriter produces (no embedded newlines).
struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    static CsvTable parse(std::string_view text);
    static CsvTable load(const std::filesystem::path& path);

    /// Column index by name; throws if absent.
    std::size_t column(std::string_view name) const;
    double number(std::size_t row, std::string_view col) const;
    const std::string& cell(std::size_t row, std::string_view col) const;
};

}  // namespace colearn
