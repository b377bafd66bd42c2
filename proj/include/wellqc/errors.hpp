#pragma once

#include <stdexcept>
#include <string>

namespace wellqc {

// Exit-code category surfaced by the CLI: contract violations map to 1,
// I/O and format problems map to 2.
enum class ErrorCategory { Contract = 1, Io = 2 };

class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what, ErrorCategory category = ErrorCategory::Contract)
        : std::runtime_error(what), kind_(std::move(kind)), category_(category) {}

    const std::string& kind() const noexcept { return kind_; }
    ErrorCategory category() const noexcept { return category_; }

private:
    std::string kind_;
    ErrorCategory category_;
};

#define WELLQC_DEFINE_ERROR(Name, Category)                                                \
    class Name : public Error {                                                            \
    public:                                                                                \
        explicit Name(const std::string& what) : Error(#Name, what, Category) {}          \
    };

WELLQC_DEFINE_ERROR(ShapeError, ErrorCategory::Contract)
WELLQC_DEFINE_ERROR(LabelError, ErrorCategory::Contract)
WELLQC_DEFINE_ERROR(ConfigError, ErrorCategory::Contract)
WELLQC_DEFINE_ERROR(GridOutOfBounds, ErrorCategory::Contract)
WELLQC_DEFINE_ERROR(InsufficientOriginals, ErrorCategory::Contract)
WELLQC_DEFINE_ERROR(EmptyClass, ErrorCategory::Contract)
WELLQC_DEFINE_ERROR(NonFiniteGradient, ErrorCategory::Contract)
WELLQC_DEFINE_ERROR(TrainingDiverged, ErrorCategory::Contract)
WELLQC_DEFINE_ERROR(EmptyEvaluation, ErrorCategory::Contract)
WELLQC_DEFINE_ERROR(FormatError, ErrorCategory::Io)
WELLQC_DEFINE_ERROR(IoError, ErrorCategory::Io)

#undef WELLQC_DEFINE_ERROR

} // namespace wellqc
