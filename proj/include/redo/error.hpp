#pragma once

#include <stdexcept>
#include <string>

namespace redo {

/// Raised when a caller breaks a documented precondition (shape, range, index).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Object masks whose per-pixel mass exceeds one by more than the tolerated overshoot.
class InvalidMaskError : public std::runtime_error {
 public:
  InvalidMaskError(const std::string& what, int x, int y, double mass)
      : std::runtime_error(what), x_(x), y_(y), mass_(mass) {}
  int x() const { return x_; }
  int y() const { return y_; }
  double mass() const { return mass_; }

 private:
  int x_;
  int y_;
  double mass_;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

}  // namespace redo
