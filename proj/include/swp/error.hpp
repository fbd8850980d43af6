#pragma once

#include <stdexcept>
#include <string>

namespace swp {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Archive or frame failed a structural or checksum validation.
class IntegrityError : public Error {
public:
    explicit IntegrityError(const std::string& msg) : Error(msg) {}
};

// A stage model could not be reached or refused to answer; the
// cascade maps this to its ranked fallback instead of failing.
class StageUnavailable : public Error {
public:
    explicit StageUnavailable(const std::string& msg) : Error(msg) {}
};

} // namespace swp
