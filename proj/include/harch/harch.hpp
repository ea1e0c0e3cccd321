#pragma once

#include "harch/checkpoint.hpp"
#include "harch/config.hpp"
#include "harch/corpus.hpp"
#include "harch/encoder.hpp"
#include "harch/error.hpp"
#include "harch/evaluation.hpp"
#include "harch/hash.hpp"
#include "harch/model.hpp"
#include "harch/nn.hpp"
#include "harch/prompting.hpp"
#include "harch/sense_hierarchy.hpp"
#include "harch/tabular.hpp"
#include "harch/training.hpp"
