#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace thinobs {

/// Failure categories surfaced by every module. The string forms are part of
/// the CLI's machine-readable error record and must stay stable.
enum class ErrorKind {
    invalid_spec,
    stencil_out_of_domain,
    invalid_family,
    invalid_ellipticity,
    non_monotone_after_transform,
    no_convergence,
    infeasible_obstacle,
    insufficient_radii,
    invalid_cylinder,
    unsupported_dimension,
    infeasible,
    ambiguous,
    incomplete_run,
    invalid_config,
    io_error,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::invalid_spec: return "invalid-spec";
        case ErrorKind::stencil_out_of_domain: return "stencil-out-of-domain";
        case ErrorKind::invalid_family: return "invalid-family";
        case ErrorKind::invalid_ellipticity: return "invalid-ellipticity";
        case ErrorKind::non_monotone_after_transform: return "non-monotone-after-transform";
        case ErrorKind::no_convergence: return "no-convergence";
        case ErrorKind::infeasible_obstacle: return "infeasible-obstacle";
        case ErrorKind::insufficient_radii: return "insufficient-radii";
        case ErrorKind::invalid_cylinder: return "invalid-cylinder";
        case ErrorKind::unsupported_dimension: return "unsupported-dimension";
        case ErrorKind::infeasible: return "infeasible";
        case ErrorKind::ambiguous: return "ambiguous";
        case ErrorKind::incomplete_run: return "incomplete-run";
        case ErrorKind::invalid_config: return "invalid-config";
        case ErrorKind::io_error: return "io-error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace thinobs
