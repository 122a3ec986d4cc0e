#pragma once

#include "emns/analysis.hpp"
#include "emns/dataset.hpp"
#include "emns/errors.hpp"
#include "emns/field_ops.hpp"
#include "emns/gbt.hpp"
#include "emns/ingest.hpp"
#include "emns/legendre.hpp"
#include "emns/mlp.hpp"
#include "emns/model.hpp"
#include "emns/mpem.hpp"
#include "emns/neural.hpp"
#include "emns/rng.hpp"
#include "emns/serialize.hpp"
#include "emns/types.hpp"
