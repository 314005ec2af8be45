#pragma once

#include <stdexcept>
#include <string>

namespace pulsestress {

enum class Errc {
    Format,
    EmptyData,
    Validation,
    Parse,
    UnsupportedRate,
    Design,
    Length,
    QualityTooLow,
    InsufficientBeats,
    Shape,
    Usage,
    Config,
    SchemaVersion,
    MissingCache,
    Io,
};

const char* to_string(Errc code);

// Single exception type for the library; `code()` tells callers which
// contract was violated so they can drop a segment vs. abort a run.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace pulsestress
