#pragma once

#include <stdexcept>
#include <string>

namespace polyroute {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class InvalidConfiguration : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// Thrown when a consumer requires fully-known scores but the tensor has
/// masked entries.
class UnknownScoreError : public Error {
public:
    using Error::Error;
};

class UnknownLanguage : public Error {
public:
    using Error::Error;
};

/// Language with resource class 0 cannot be scored (division by class).
class IneligibleLanguage : public Error {
public:
    using Error::Error;
};

class BackendUnavailable : public Error {
public:
    using Error::Error;
};

class RateLimited : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

class InvalidJob : public Error {
public:
    using Error::Error;
};

class IndexMismatch : public Error {
public:
    using Error::Error;
};

class StrategyFailed : public Error {
public:
    using Error::Error;
};

/// The strategy cannot run for this language at all (e.g. no pivot exists);
/// callers treat the corresponding score cell as masked, not as a failure.
class StrategyInapplicable : public Error {
public:
    using Error::Error;
};

class JudgeProtocolError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ArchitectureError : public Error {
public:
    using Error::Error;
};

class TrainingDiverged : public Error {
public:
    using Error::Error;
};

class CheckpointMismatch : public Error {
public:
    using Error::Error;
};

}  // namespace polyroute
