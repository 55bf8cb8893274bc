#pragma once

#include <stdexcept>
#include <string>

namespace saesteer {

// Invalid model/SAE configuration (bad dimensions, bad hyperparameters).
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Matrix/vector dimension mismatch.
class shape_error : public std::runtime_error {
public:
    explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input text (CSV, JSON lines). Carries a 1-based row/line number
// when one is known; row 0 means "not row-specific".
class format_error : public std::runtime_error {
public:
    format_error(const std::string& msg, long long row = 0)
        : std::runtime_error(row > 0 ? msg + " (row " + std::to_string(row) + ")" : msg),
          row_(row) {}
    long long row() const { return row_; }

private:
    long long row_ = 0;
};

// Structurally valid input that violates a semantic rule (e.g. a
// clamp_refusal row without refusal_id).
class validation_error : public std::runtime_error {
public:
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A steering spec that cannot be executed (inconsistent refusal rows,
// unknown action value injected programmatically).
class specification_error : public std::runtime_error {
public:
    explicit specification_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Weight directory load failure; names the offending field or file.
class load_error : public std::runtime_error {
public:
    explicit load_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Latent description lookup failure (cold cache, unreachable endpoint).
class fetch_error : public std::runtime_error {
public:
    explicit fetch_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Remote payload that could not be interpreted.
class decode_error : public std::runtime_error {
public:
    explicit decode_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace saesteer
