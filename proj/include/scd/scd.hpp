#pragma once

#include "scd/bench.hpp"
#include "scd/config.hpp"
#include "scd/data.hpp"
#include "scd/decoder.hpp"
#include "scd/encoder.hpp"
#include "scd/errors.hpp"
#include "scd/gradcheck.hpp"
#include "scd/infer.hpp"
#include "scd/metrics.hpp"
#include "scd/model.hpp"
#include "scd/mta.hpp"
#include "scd/ops.hpp"
#include "scd/params.hpp"
#include "scd/rng.hpp"
#include "scd/stp.hpp"
#include "scd/tensor.hpp"
#include "scd/train.hpp"
