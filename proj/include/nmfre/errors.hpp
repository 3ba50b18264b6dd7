#pragma once

#include <stdexcept>
#include <string>

namespace nmfre {

// Error taxonomy shared across modules. The CLI maps these onto its stable
// exit codes (see tools/).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct NegativeData : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };
struct SingularSystem : Error { using Error::Error; };
struct DegenerateColumn : Error { using Error::Error; };
struct CapInfeasible : Error { using Error::Error; };
struct NonPositiveDF : Error { using Error::Error; };
struct SingularInformation : Error { using Error::Error; };
struct SimulationFailure : Error { using Error::Error; };

}  // namespace nmfre
