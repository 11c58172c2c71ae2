#include "failure_scout/errors.hpp"

namespace failure_scout {

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

EmptyClassError::EmptyClassError(int label)
    : Error("class " + std::to_string(label) + " has no samples with that pseudolabel"), label_(label) {}

NumericalError::NumericalError(const std::string& what, std::optional<int> round)
    : Error(round ? "round " + std::to_string(*round) + ": " + what : what), round_(round) {}

}  // namespace failure_scout
