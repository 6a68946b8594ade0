#pragma once

#include <stdexcept>
#include <string>

namespace gladder {

// Bad inputs: malformed files, violated invariants, mismatched shapes.
// The CLI maps these to exit code 2.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures at run time: I/O, corrupt artifacts, non-finite numerics.
// The CLI maps these to exit code 3.
struct RuntimeFailure : std::runtime_error {
    explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gladder
