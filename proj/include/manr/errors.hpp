#pragma once

#include <stdexcept>
#include <string>

namespace manr {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidReference : public Error { using Error::Error; };
class InvariantViolation : public Error { using Error::Error; };
class IllegalAction : public Error { using Error::Error; };
class ConflictError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class SizeError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class VersionError : public FormatError { using FormatError::FormatError; };
class NumericalError : public Error { using Error::Error; };

}  // namespace manr
