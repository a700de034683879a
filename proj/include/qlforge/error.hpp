#pragma once

#include <stdexcept>
#include <string>

namespace qlforge {

/// Base of every error raised by the pipeline. Each stage throws a named
/// subclass so callers can react to a specific failure without string matching.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define QLFORGE_DEFINE_ERROR(Name)                   \
    class Name : public Error {                      \
    public:                                          \
        using Error::Error;                          \
    }

// extractor
QLFORGE_DEFINE_ERROR(BackendUnavailable);
QLFORGE_DEFINE_ERROR(InvalidFilterConfig);
QLFORGE_DEFINE_ERROR(SpecFormatError);

// llm-gateway
QLFORGE_DEFINE_ERROR(TransportError);
QLFORGE_DEFINE_ERROR(AuthFailure);
QLFORGE_DEFINE_ERROR(RateLimited);
QLFORGE_DEFINE_ERROR(ProviderError);

// classifier / pairer
QLFORGE_DEFINE_ERROR(RecordTooLarge);
QLFORGE_DEFINE_ERROR(UnknownApiId);
QLFORGE_DEFINE_ERROR(TemplateError);
QLFORGE_DEFINE_ERROR(WhollyMalformed);
QLFORGE_DEFINE_ERROR(BallotCountMismatch);
QLFORGE_DEFINE_ERROR(NothingToPair);

// rulegen
QLFORGE_DEFINE_ERROR(EmptyDraft);
QLFORGE_DEFINE_ERROR(CompilerUnavailable);

// pipeline / fixtures
QLFORGE_DEFINE_ERROR(ConfigError);
QLFORGE_DEFINE_ERROR(UnwritableOutput);
QLFORGE_DEFINE_ERROR(FixtureDrift);

#undef QLFORGE_DEFINE_ERROR

/// A fatal error from one pipeline stage, tagged with the stage name.
class StageFailure : public Error {
public:
    StageFailure(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} // namespace qlforge
