#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tart {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct SingularMatrixError : Error {
    using Error::Error;
};

struct EmptyInputError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct SamplingError : Error {
    using Error::Error;
};

struct CheckpointError : Error {
    using Error::Error;
};

struct NumericalError : Error {
    using Error::Error;
};

/// Raised when an episode's normalized prototype matrix is row-rank deficient,
/// making the transformation matrix unsolvable. Carries the class indices of
/// colliding prototypes when they can be identified.
struct DegenerateTaskError : Error {
    std::vector<std::pair<int, int>> colliding_classes;

    explicit DegenerateTaskError(const std::string& msg,
                                 std::vector<std::pair<int, int>> colliding = {})
        : Error(msg), colliding_classes(std::move(colliding)) {}
};

}  // namespace tart
