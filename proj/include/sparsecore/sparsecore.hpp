#pragma once

#include "sparsecore/core_tensor.hpp"
#include "sparsecore/embeddings.hpp"
#include "sparsecore/error.hpp"
#include "sparsecore/eval.hpp"
#include "sparsecore/io.hpp"
#include "sparsecore/kb_data.hpp"
#include "sparsecore/model.hpp"
#include "sparsecore/planted.hpp"
#include "sparsecore/random.hpp"
#include "sparsecore/search.hpp"
#include "sparsecore/training.hpp"
