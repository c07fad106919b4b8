// Umbrella header.
#pragma once

#include "onoalign/binary_io.hpp"
#include "onoalign/checkpoint.hpp"
#include "onoalign/embstore.hpp"
#include "onoalign/metrics.hpp"
#include "onoalign/model.hpp"
#include "onoalign/nncore.hpp"
#include "onoalign/report.hpp"
#include "onoalign/retrieval.hpp"
#include "onoalign/rng.hpp"
#include "onoalign/tensor.hpp"
#include "onoalign/train.hpp"
