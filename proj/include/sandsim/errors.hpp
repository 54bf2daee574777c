#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sandsim {

/// Base of every fault raised by the library. Recoverable outcomes (an IK
/// target that cannot be reached, for instance) are values, not exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class JointLimitViolation : public Error {
 public:
  explicit JointLimitViolation(std::size_t index)
      : Error("joint " + std::to_string(index) + " outside its limits"), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class ContactOffSurface : public Error {
 public:
  ContactOffSurface() : Error("tool contact center lies outside the surface grid") {}
};

class EmptyScan : public Error {
 public:
  EmptyScan() : Error("no camera ray intersected the workpiece") {}
};

class DegenerateCloud : public Error {
 public:
  using Error::Error;
};

class AlreadyAccepted : public Error {
 public:
  AlreadyAccepted() : Error("registration already accepted") {}
};

class UnknownGeometry : public Error {
 public:
  explicit UnknownGeometry(const std::string& id) : Error("unknown geometry '" + id + "'") {}
};

class MarkerOffSurface : public Error {
 public:
  explicit MarkerOffSurface(std::size_t index)
      : Error("marker " + std::to_string(index) + " does not project onto the surface"),
        index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class DegenerateQuad : public Error {
 public:
  DegenerateQuad() : Error("marker quadrilateral is degenerate") {}
};

class UnconfirmedRegistration : public Error {
 public:
  UnconfirmedRegistration() : Error("object pose has not been confirmed by the operator") {}
};

class InvalidAction : public Error {
 public:
  InvalidAction(const std::string& phase, const std::string& action)
      : Error("action '" + action + "' is not valid in phase " + phase),
        phase_(phase),
        action_(action) {}
  const std::string& phase() const noexcept { return phase_; }
  const std::string& action() const noexcept { return action_; }

 private:
  std::string phase_;
  std::string action_;
};

class ScriptPhaseMismatch : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class BindError : public Error {
 public:
  using Error::Error;
};

}  // namespace sandsim
