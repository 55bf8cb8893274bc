#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "saesteer/errors.hpp"

namespace saesteer {

// Dense row-major float32 matrix. Model weights, residual activations and
// SAE latents all use this type; float32 matches the on-disk tensor format
// exactly, so save/load round-trips are bit-identical.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
        if (rows < 0 || cols < 0) throw shape_error("matrix dimensions must be non-negative");
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    float& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    float operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    std::span<float> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }
    std::span<const float> row(int r) const { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

    std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<float> data_;
};

inline void require_shape(const Matrix& m, int rows, int cols, const std::string& what) {
    if (m.rows() != rows || m.cols() != cols)
        throw shape_error(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                          ", got " + m.shape_str());
}

inline void require_cols(const Matrix& m, int cols, const std::string& what) {
    if (m.cols() != cols)
        throw shape_error(what + ": expected width " + std::to_string(cols) + ", got " + m.shape_str());
}

} // namespace saesteer
