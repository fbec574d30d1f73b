#pragma once

#include <stdexcept>
#include <string>

namespace dnet {

/// Root of every exception thrown by the toolkit.
///
/// Each subclass can rethrow itself with an extra context prefix so that
/// callers (e.g. the layer loop of the model) can annotate an error without
/// losing its concrete type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  [[noreturn]] virtual void rethrow_with_context(const std::string& prefix) const = 0;
};

#define DNET_DEFINE_ERROR(Name)                                                  \
  class Name : public Error {                                                    \
   public:                                                                       \
    using Error::Error;                                                          \
    [[noreturn]] void rethrow_with_context(const std::string& prefix) const override { \
      throw Name(prefix + ": " + what());                                        \
    }                                                                            \
  };

/// Incompatible tensor shapes or matrix sizes.
DNET_DEFINE_ERROR(DimensionError)
/// Non-finite values where finite ones are required.
DNET_DEFINE_ERROR(NumericError)
/// Operation invoked in the wrong lifecycle state (double backward, missing grad).
DNET_DEFINE_ERROR(StateError)
/// Inconsistent hyperparameters or ablation flags.
DNET_DEFINE_ERROR(ConfigError)
/// Malformed CSV / checkpoint / config file content.
DNET_DEFINE_ERROR(FormatError)
/// Data that is well-formed but unusable (series too short, ...).
DNET_DEFINE_ERROR(DataError)
/// Invalid argument values (negative adjacency weights, ...).
DNET_DEFINE_ERROR(ValidationError)

#undef DNET_DEFINE_ERROR

}  // namespace dnet
