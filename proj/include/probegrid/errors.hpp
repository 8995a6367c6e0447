#ifndef PROBEGRID_ERRORS_HPP
#define PROBEGRID_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace probegrid {

/// Malformed graph structure: cycles, orphan nodes, bad parent indices.
class StructuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A requested object does not exist, e.g. a spanning tree of a disconnected graph
/// or the inverse of a singular Laplacian.
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Iterative solver breakdown (non-convergence, NaN residuals, barrier breach).
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exact recovery failed because the input columns are not realizable by any tree.
class ReconstructionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& source, int line, int column, const std::string& what)
        : std::runtime_error(source + ":" + std::to_string(line) + ":" + std::to_string(column) +
                             ": " + what),
          line_(line),
          column_(column) {}

    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

}  // namespace probegrid

#endif  // PROBEGRID_ERRORS_HPP
