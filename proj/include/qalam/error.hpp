#pragma once

#include <stdexcept>
#include <string>

namespace qalam {

// Base class for every error raised by the library.
class error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class shape_error : public error {
  public:
    using error::error;
};

class numeric_error : public error {
  public:
    using error::error;
};

// Malformed input data: CSV rows, request bodies, label names.
class data_error : public error {
  public:
    using error::error;
};

// Model files: bad magic, unsupported version, truncation.
class format_error : public error {
  public:
    using error::error;
};

// Stroke count has no group in the table.
class routing_error : public error {
  public:
    routing_error(const std::string &what, int strokes) :
        error{ what },
        strokes_{ strokes } {}

    [[nodiscard]] int strokes() const noexcept { return strokes_; }

  private:
    int strokes_;
};

// Layer API misuse, e.g. backward without a training-mode forward.
class state_error : public error {
  public:
    using error::error;
};

}  // namespace qalam
