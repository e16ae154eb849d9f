#pragma once

#include <stdexcept>
#include <string>

namespace gqst {

/// Filesystem-level failure (open, read, write, rename).
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

/// Structurally invalid file contents: bad magic, unsupported version,
/// truncation, shape mismatch.
class format_error : public std::runtime_error {
public:
    explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

/// Estimation cannot proceed on the given data (too few usable bins,
/// singular fit, non-positive variances).
class estimation_error : public std::runtime_error {
public:
    explicit estimation_error(const std::string& what)
        : std::runtime_error(what) {}
};

}  // namespace gqst
