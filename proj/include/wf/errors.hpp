#ifndef WF_ERRORS_HPP
#define WF_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace wf {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Extent/rank mismatch between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid argument value (empty axis set, bad latitude, zero std, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Operation attempted in an invalid state (unrecorded tape, NaN loss, ...).
class StateError : public Error {
public:
    using Error::Error;
};

/// On-disk format violation. Each failure mode carries a distinct kind.
class FormatError : public Error {
public:
    enum class Kind { bad_magic, bad_version, truncated, bad_checksum, io };

    FormatError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

} // namespace wf

#endif // WF_ERRORS_HPP
