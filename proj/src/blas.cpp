#include "redo/blas.hpp"

namespace redo::blas {

void set_single_threaded() { openblas_set_num_threads(1); }

}  // namespace redo::blas
