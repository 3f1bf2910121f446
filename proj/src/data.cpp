#include "colearn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace colearn {

namespace {

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

void put_be32(std::string& out, std::uint32_t v) {
    out += static_cast<char>((v >> 24) & 0xff);
    out += static_cast<char>((v >> 16) & 0xff);
    out += static_cast<char>((v >> 8) & 0xff);
    out += static_cast<char>(v & 0xff);
}

std::string hex32(std::uint32_t v) {
    std::ostringstream ss;
    ss << "0x" << std::hex;
    ss.width(8);
    ss.fill('0');
    ss << v;
    return ss.str();
}

}  // namespace

IdxArray read_idx(const std::filesystem::path& path, std::uint32_t expected_magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("idx: cannot open " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 4) throw LengthError("idx: " + path.string() + " is shorter than its magic number");

    IdxArray a;
    a.magic = be32(bytes, 0);
    if (a.magic != expected_magic)
        throw FormatError("idx: " + path.string() + " has magic " + hex32(a.magic) + ", expected " +
                          hex32(expected_magic));
    const std::size_t rank = a.magic & 0xff;
    const std::size_t header = 4 + 4 * rank;
    if (bytes.size() < header) throw LengthError("idx: " + path.string() + " truncated inside the header");
    std::size_t count = 1;
    for (std::size_t d = 0; d < rank; ++d) {
        a.dims.push_back(be32(bytes, 4 + 4 * d));
        count *= a.dims.back();
    }
    if (bytes.size() - header < count)
        throw LengthError("idx: " + path.string() + " holds " + std::to_string(bytes.size() - header) +
                          " payload bytes, header promises " + std::to_string(count));
    a.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                    bytes.begin() + static_cast<std::ptrdiff_t>(header + count));
    return a;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
    std::string out;
    put_be32(out, array.magic);
    for (auto d : array.dims) put_be32(out, d);
    out.append(reinterpret_cast<const char*>(array.values.data()), array.values.size());
    atomic_write(path, out);
}

MatrixX<double> simplex_directions(Index classes, Index dim) {
    if (dim < classes - 1) throw std::invalid_argument("simplex_directions: dim < classes - 1");
    // Helmert basis of the subspace orthogonal to the all-ones vector: the
    // coordinates of e_c - 1/classes in that basis are the simplex vertices.
    MatrixX<double> v = MatrixX<double>::Zero(classes, dim);
    for (Index k = 1; k < classes; ++k) {
        const double norm = std::sqrt(static_cast<double>(k * (k + 1)));
        for (Index c = 0; c < k; ++c) v(c, k - 1) = 1.0 / norm;
        v(k, k - 1) = -static_cast<double>(k) / norm;
    }
    return v / std::sqrt(1.0 - 1.0 / static_cast<double>(classes));
}

SplitIndices stratified_split(const std::vector<int>& labels, Index classes, double test_fraction,
                              std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::invalid_argument("split: test fraction must lie in (0, 1)");

    std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(classes));
    for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(static_cast<std::size_t>(labels[i])).push_back(static_cast<Index>(i));

    const auto total = static_cast<Index>(std::llround(static_cast<double>(labels.size()) * test_fraction));
    std::vector<Index> quota(by_class.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    Index assigned = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const double exact = static_cast<double>(by_class[c].size()) * test_fraction;
        quota[c] = static_cast<Index>(std::floor(exact));
        assigned += quota[c];
        remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < total && r < remainders.size(); ++r, ++assigned) ++quota[remainders[r].second];

    SplitIndices out;
    Rng rng(seed);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto idx = by_class[c];
        rng.shuffle(idx);
        out.test.insert(out.test.end(), idx.begin(), idx.begin() + quota[c]);
        out.train.insert(out.train.end(), idx.begin() + quota[c], idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

}  // namespace colearn
