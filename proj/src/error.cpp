#include "pulsestress/error.hpp"

namespace pulsestress {

const char* to_string(Errc code) {
    switch (code) {
    case Errc::Format: return "format error";
    case Errc::EmptyData: return "empty data";
    case Errc::Validation: return "validation error";
    case Errc::Parse: return "parse error";
    case Errc::UnsupportedRate: return "unsupported sample rate";
    case Errc::Design: return "filter design error";
    case Errc::Length: return "length error";
    case Errc::QualityTooLow: return "quality too low";
    case Errc::InsufficientBeats: return "insufficient beats";
    case Errc::Shape: return "shape error";
    case Errc::Usage: return "usage error";
    case Errc::Config: return "configuration error";
    case Errc::SchemaVersion: return "schema version mismatch";
    case Errc::MissingCache: return "missing cache";
    case Errc::Io: return "i/o error";
    }
    return "unknown error";
}

}  // namespace pulsestress
