#pragma once

#include "weakrank/attribute_miner.hpp"
#include "weakrank/embedding.hpp"
#include "weakrank/encoder.hpp"
#include "weakrank/evaluator.hpp"
#include "weakrank/objective.hpp"
#include "weakrank/pipeline.hpp"
#include "weakrank/retrieval.hpp"
#include "weakrank/synthetic.hpp"
#include "weakrank/gradcheck.hpp"
