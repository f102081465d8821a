#pragma once

#include <stdexcept>
#include <string>

namespace ucms {

// Input outside the mathematical domain of a formula (e.g. zero frequency).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Shape, id or roster mismatch between collaborating structures.
class StructuralError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// A raw value outside its configured range.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Replay buffer holds fewer experiences than requested.
class NotReadyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite gradients, losses or parameters during training.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ucms
