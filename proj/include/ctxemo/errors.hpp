#pragma once

#include <stdexcept>
#include <string>

namespace ctxemo {

// Exit-status classes used by the command-line tool.
enum class ErrorKind { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

// Anything wrong with input files: corpora, vocabularies, predictions, checkpoints.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class ParseError : public DataError {
    using DataError::DataError;
};
class SchemaError : public DataError {
    using DataError::DataError;
};
class LabelError : public DataError {
    using DataError::DataError;
};
class VocabError : public DataError {
    using DataError::DataError;
};
class SplitError : public DataError {
    using DataError::DataError;
};
class StatsError : public DataError {
    using DataError::DataError;
};
class EvaluationError : public DataError {
    using DataError::DataError;
};
class CheckpointError : public DataError {
    using DataError::DataError;
};

// Failures inside the numerical pipeline.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

class ShapeError : public NumericError {
    using NumericError::NumericError;
};
class EmbeddingError : public NumericError {
    using NumericError::NumericError;
};
class PositionError : public NumericError {
    using NumericError::NumericError;
};
class PoolingError : public NumericError {
    using NumericError::NumericError;
};
class WeightError : public NumericError {
    using NumericError::NumericError;
};
class LossError : public NumericError {
    using NumericError::NumericError;
};
class TrainingError : public NumericError {
    using NumericError::NumericError;
};

}  // namespace ctxemo
