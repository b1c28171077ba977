#pragma once

#include "v2x/oracle.hpp"

namespace v2x::reference {

// Serial twins of the enumeration kernels, written with different loop
// structures on purpose. They are the ground truth the parallel versions and
// the benchmark tool are measured against; nothing else should call them.

// Transmitter-major rate accumulation (the library walks receivers).
RateReport compute_rates(const JointAction& joint, const ChannelRealization& r,
                         const ChannelParams& params);

// Odometer recursion over agents instead of flat-index division.
PayoffTensor payoff_tensor(int L, int M, int num_power_levels, const PayoffFn& fn);

// Plain linear scan.
SearchResult best_joint(const PayoffTensor& tensor, int num_power_levels);

// Deviation check driven by neighbor walks per agent.
EquilibriumSet enumerate_pure_nash(const PayoffTensor& tensor);

}  // namespace v2x::reference
