#pragma once

#include <stdexcept>
#include <string>

namespace dgtl {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error { public: using Error::Error; };
class DataError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };
class StateError : public Error { public: using Error::Error; };
class RangeError : public Error { public: using Error::Error; };
class ProtocolError : public Error { public: using Error::Error; };
class IOError : public Error { public: using Error::Error; };

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what, long step = -1)
        : Error(what), step_(step) {}
    /// Training step at which the failure happened, -1 outside training.
    long step() const noexcept { return step_; }

private:
    long step_;
};

/// Raised while reading CSV or config text; carries a 1-based location.
class ParseError : public Error {
public:
    ParseError(const std::string& what, long row, long column = 0)
        : Error(format(what, row, column)), row_(row), column_(column) {}
    long row() const noexcept { return row_; }
    long column() const noexcept { return column_; }

private:
    static std::string format(const std::string& what, long row, long column) {
        std::string out = "row " + std::to_string(row);
        if (column > 0) out += ", column " + std::to_string(column);
        return out + ": " + what;
    }
    long row_;
    long column_;
};

}  // namespace dgtl
