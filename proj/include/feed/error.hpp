#pragma once

#include <stdexcept>
#include <string>

namespace feed {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can report a single machine-parseable line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& w) : Error("shape", w) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& w) : Error("numeric", w) {}
};

struct GraphError : Error {
    explicit GraphError(const std::string& w) : Error("graph", w) {}
};

struct OptimizerError : Error {
    explicit OptimizerError(const std::string& w) : Error("optimizer", w) {}
};

struct DataError : Error {
    explicit DataError(const std::string& w) : Error("data", w) {}
};

struct SchemaError : Error {
    explicit SchemaError(const std::string& w) : Error("schema", w) {}
};

struct MetricError : Error {
    explicit MetricError(const std::string& w) : Error("metric", w) {}
};

struct DivergenceError : Error {
    DivergenceError(const std::string& w, long last_good_step)
        : Error("divergence", w), last_good_step_(last_good_step) {}

    long last_good_step() const noexcept { return last_good_step_; }

private:
    long last_good_step_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error("config", w) {}
};

struct CheckpointError : Error {
    explicit CheckpointError(const std::string& w) : Error("checkpoint", w) {}
};

struct IoError : Error {
    explicit IoError(const std::string& w) : Error("io", w) {}
};

} // namespace feed
