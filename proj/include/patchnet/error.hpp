#pragma once

#include <stdexcept>
#include <string>

namespace patchnet {

// Failure categories. The C API maps these onto its status codes, and the
// CLI maps those onto process exit codes.
enum class ErrorKind {
    InvalidArgument,   // shape mismatch, bad parameter value
    Config,            // invalid geometry or run configuration
    Io,                // unreadable/unwritable path
    Format,            // malformed image or manifest content
    Checkpoint,        // checkpoint file rejected
};

// Finer detail for checkpoint and codec rejections so callers can tell
// e.g. a truncated file from a corrupted one.
enum class FormatDetail {
    None,
    BadMagic,
    BadVersion,
    Truncated,
    BadChecksum,
    KindMismatch,
    BadMaxval,
    BadHeader,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what, FormatDetail detail = FormatDetail::None)
        : std::runtime_error(what), kind_(kind), detail_(detail) {}

    ErrorKind kind() const noexcept { return kind_; }
    FormatDetail detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    FormatDetail detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what,
                              FormatDetail detail = FormatDetail::None) {
    throw Error(kind, what, detail);
}

inline void require(bool cond, const std::string& what) {
    if (!cond) fail(ErrorKind::InvalidArgument, what);
}

}  // namespace patchnet
