// SPDX-License-Identifier: Apache-2.0
//
// Exception hierarchy shared by all ramerge modules.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ramerge {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Raised by line-oriented readers; line numbers are 1-based.
class LogFormatError : public Error {
public:
    LogFormatError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// Collects every validation failure instead of stopping at the first one.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& problems) {
        std::string out = "validation failed:";
        for (const auto& p : problems) {
            out += "\n  - " + p;
        }
        return out;
    }
    std::vector<std::string> problems_;
};

}  // namespace ramerge
