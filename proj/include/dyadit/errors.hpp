#pragma once

#include <stdexcept>
#include <string>

namespace dyadit {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/dimension disagreement between operands (covers per-op ShapeMismatch/DimMismatch).
struct ShapeError : Error {
    using Error::Error;
};

struct DegenerateInput : Error {
    using Error::Error;
};

struct InvalidRotation : Error {
    using Error::Error;
};

struct TooShort : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct IndexOutOfRange : Error {
    using Error::Error;
};

struct OutOfRange : Error {
    using Error::Error;
};

struct NumericalFailure : Error {
    using Error::Error;
};

struct InsufficientSamples : Error {
    using Error::Error;
};

struct UnknownProvider : Error {
    using Error::Error;
};

}  // namespace dyadit
