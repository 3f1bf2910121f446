#include "colearn/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace colearn {

void atomic_write(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_number(double value) {
    char buf[40];
    if (value == 0) value = 0;  // no "-0"
    std::snprintf(buf, sizeof buf, "%.10g", value);
    return buf;
}

CsvWriter::Row& CsvWriter::Row::str(std::string_view value) {
    sep();
    if (value.find_first_of(",\"\n") == std::string_view::npos) {
        out_ += value;
    } else {
        out_ += '"';
        for (char c : value) {
            if (c == '"') out_ += '"';
            out_ += c;
        }
        out_ += '"';
    }
    return *this;
}

void CsvWriter::header(const std::vector<std::string>& columns) {
    Row r(text_);
    for (const auto& c : columns) r.str(c);
}

namespace {

std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    cells.push_back(std::move(cur));
    return cells;
}

}  // namespace

CsvTable CsvTable::parse(std::string_view text) {
    CsvTable t;
    std::size_t start = 0;
    bool first = true;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        if (first) {
            t.columns = split_line(line);
            first = false;
        } else {
            t.rows.push_back(split_line(line));
        }
    }
    return t;
}

CsvTable CsvTable::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::size_t CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return i;
    throw std::out_of_range("csv: no column '" + std::string(name) + "'");
}

const std::string& CsvTable::cell(std::size_t row, std::string_view col) const {
    return rows.at(row).at(column(col));
}

double CsvTable::number(std::size_t row, std::string_view col) const { return std::stod(cell(row, col)); }

}  // namespace colearn
