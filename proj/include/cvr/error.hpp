#pragma once

#include <stdexcept>
#include <string>

namespace cvr {

enum class ErrorKind {
    EmptyText,
    DegenerateVector,
    MissingEmbedding,
    InvalidToken,
    ShapeError,
    NoInputs,
    NonFiniteInput,
    NoLossTerms,
    MissingDescription,
    EmptyAfterCleaning,
    EmptyCalibration,
    DuplicateId,
    EmptyIndex,
    MissingGroundTruth,
    InvalidSubset,
    TooSmall,
    DivergedTraining,
    BadInput,   // malformed files, unresolved ids, bad CLI arguments
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

const char* error_kind_name(ErrorKind kind);

} // namespace cvr
