// Worker-count control for the OpenMP kernels.
#pragma once

namespace dsa4d {

/// Kernels that have both a serial reference path and an OpenMP path take
/// this tag. The serial path is kept for testing and benchmarking.
enum class Exec { Serial, Parallel };

/// Sets the OpenMP worker count; n <= 0 restores the hardware default.
void set_num_workers(int n);
int num_workers();
int hardware_workers();

}  // namespace dsa4d
