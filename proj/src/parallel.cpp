#include "dsa4d/parallel.hpp"

#include <omp.h>

namespace dsa4d {

void set_num_workers(int n) { omp_set_num_threads(n > 0 ? n : omp_get_num_procs()); }

int num_workers() { return omp_get_max_threads(); }

int hardware_workers() { return omp_get_num_procs(); }

}  // namespace dsa4d
