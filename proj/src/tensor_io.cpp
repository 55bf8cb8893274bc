#include "saesteer/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "saesteer/errors.hpp"

namespace saesteer {

namespace {

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

} // namespace

void write_tensor(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw load_error("cannot open tensor file for writing: " + path.string());

    std::vector<std::uint32_t> buf(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, m.data() + i, 4);
        buf[i] = to_le(bits);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!out) throw load_error("short write on tensor file: " + path.string());
}

Matrix read_tensor(const std::filesystem::path& path, int rows, int cols, const std::string& field) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw load_error("missing tensor file for " + field + ": " + path.string());

    const auto bytes = static_cast<std::size_t>(in.tellg());
    const std::size_t expected = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 4;
    if (bytes != expected)
        throw load_error("tensor " + field + " has " + std::to_string(bytes) + " bytes, expected " +
                         std::to_string(expected) + " for shape " + std::to_string(rows) + "x" +
                         std::to_string(cols));

    in.seekg(0);
    std::vector<std::uint32_t> buf(static_cast<std::size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
    if (!in) throw load_error("short read on tensor file for " + field + ": " + path.string());

    Matrix m(rows, cols);
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const std::uint32_t bits = to_le(buf[i]);
        std::memcpy(m.data() + i, &bits, 4);
    }
    return m;
}

} // namespace saesteer
