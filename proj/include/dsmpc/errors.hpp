#pragma once

#include <stdexcept>
#include <string>

namespace dsmpc {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// model construction
struct DimensionMismatch : Error { using Error::Error; };
struct DirectedEdge : Error { using Error::Error; };
struct ZeroAWithNonzeroC : Error { using Error::Error; };
struct NonpositiveBound : Error { using Error::Error; };

// linear algebra / conic
struct NonSymmetric : Error { using Error::Error; };

// constraint tightening
struct OutOfRangeProbability : Error { using Error::Error; };

// synthesis
struct SynthesisInfeasible : Error { using Error::Error; };
struct EmptyTerminalSet : Error { using Error::Error; };

// online control
struct AgentInfeasible : Error { using Error::Error; };
struct GlobalInfeasible : Error { using Error::Error; };
struct BothStrategiesInfeasible : Error { using Error::Error; };

// configuration / io
struct ConfigError : Error { using Error::Error; };
struct IngredientsMismatch : Error { using Error::Error; };

}  // namespace dsmpc
