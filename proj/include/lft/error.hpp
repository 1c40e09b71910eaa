#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lft {

// Operand shapes or lengths disagree.
struct dimension_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid hyperparameters, band lists, schedules, CLI values.
struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward() on a non-scalar.
struct contract_error : std::logic_error {
  using std::logic_error::logic_error;
};

struct index_error : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Non-finite values or an argument outside the function's domain.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct domain_error : std::domain_error {
  using std::domain_error::domain_error;
};

struct spectrum_corruption_error : numeric_error {
  using numeric_error::numeric_error;
};

struct sampler_divergence_error : numeric_error {
  sampler_divergence_error(std::size_t step_index, const std::string& what)
      : numeric_error(what), step(step_index) {}
  std::size_t step;
};

struct training_aborted_error : numeric_error {
  using numeric_error::numeric_error;
};

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace lft
