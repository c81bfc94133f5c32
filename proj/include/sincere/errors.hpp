#pragma once

#include <stdexcept>
#include <string>

namespace sincere {

/// Bad input that violates a documented precondition or type invariant.
class validation_error : public std::invalid_argument {
public:
    explicit validation_error(const std::string& what) : std::invalid_argument(what) {}
};

/// A batch where some anchor has no noise (or no positive) partner, so the
/// contrastive objective is undefined for it.
class degenerate_batch_error : public validation_error {
public:
    explicit degenerate_batch_error(const std::string& what) : validation_error(what) {}
};

/// Row with zero norm cannot be projected onto the unit sphere.
class projection_error : public validation_error {
public:
    explicit projection_error(const std::string& what) : validation_error(what) {}
};

/// A density evaluated to zero (or a non-finite log-density) at an observed
/// point, breaking the ratio p+/p-.
class support_violation_error : public std::runtime_error {
public:
    explicit support_violation_error(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite loss or gradient during optimization; message carries
/// epoch, batch and the max logit seen.
class training_error : public std::runtime_error {
public:
    explicit training_error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or inconsistent configuration (CLI exit code 2).
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// Missing or unwritable artifact files (CLI exit code 3).
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace sincere
