#ifndef BAEOED_ERROR_HPP
#define BAEOED_ERROR_HPP

#include <stdexcept>
#include <string>

namespace baeoed {

/// Broad failure classes. The CLI maps each class onto a process exit code.
enum class ErrorClass { usage, input_format, numerical, subprocess };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what)
      : std::runtime_error(what), class_(cls) {}
  ErrorClass error_class() const noexcept { return class_; }

 private:
  ErrorClass class_;
};

#define BAEOED_DEFINE_ERROR(Name, Class)                       \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& what)                     \
        : Error(ErrorClass::Class, #Name ": " + what) {}       \
  };

BAEOED_DEFINE_ERROR(DimensionMismatch, input_format)
BAEOED_DEFINE_ERROR(FormatError, input_format)
BAEOED_DEFINE_ERROR(NonFiniteValue, input_format)
BAEOED_DEFINE_ERROR(IoError, input_format)
BAEOED_DEFINE_ERROR(NotPositiveDefinite, numerical)
BAEOED_DEFINE_ERROR(InsufficientSamples, numerical)
BAEOED_DEFINE_ERROR(SolverFailure, numerical)
BAEOED_DEFINE_ERROR(KExceedsSensors, usage)
BAEOED_DEFINE_ERROR(CombinatorialBlowup, usage)
BAEOED_DEFINE_ERROR(InvalidArgument, usage)
BAEOED_DEFINE_ERROR(Timeout, subprocess)

#undef BAEOED_DEFINE_ERROR

/// Child process failure; carries the exit code and captured stderr verbatim.
class SubprocessFailure : public Error {
 public:
  SubprocessFailure(int exit_code, std::string stderr_text, const std::string& what)
      : Error(ErrorClass::subprocess, "SubprocessFailure: " + what),
        exit_code_(exit_code),
        stderr_(std::move(stderr_text)) {}
  int exit_code() const noexcept { return exit_code_; }
  const std::string& captured_stderr() const noexcept { return stderr_; }

 private:
  int exit_code_;
  std::string stderr_;
};

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionMismatch(what);
}

}  // namespace baeoed

#endif  // BAEOED_ERROR_HPP
