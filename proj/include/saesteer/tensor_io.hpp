#pragma once

#include <filesystem>
#include <string>

#include "saesteer/matrix.hpp"

namespace saesteer {

// On-disk tensor format shared by toy models and SAEs: one raw file per
// matrix holding row-major little-endian float32 values, described by a
// JSON sidecar that records names and shapes. Files carry a ".f32" suffix.

// Writes m to path as raw little-endian float32, row-major.
void write_tensor(const std::filesystem::path& path, const Matrix& m);

// Reads a tensor written by write_tensor. The expected shape comes from the
// sidecar; a size mismatch raises load_error naming `field`.
Matrix read_tensor(const std::filesystem::path& path, int rows, int cols, const std::string& field);

} // namespace saesteer
