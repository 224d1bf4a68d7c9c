#pragma once

#include "hyem/error.hpp"
#include "hyem/util.hpp"
#include "hyem/geometry.hpp"
#include "hyem/ontology.hpp"
#include "hyem/encoding.hpp"
#include "hyem/training.hpp"
#include "hyem/index.hpp"
#include "hyem/retrieval.hpp"
#include "hyem/benchmark.hpp"
#include "hyem/evaluation.hpp"
#include "hyem/pipeline.hpp"
