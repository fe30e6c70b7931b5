#pragma once

#include "tdg/analysis.hpp"
#include "tdg/corpus.hpp"
#include "tdg/evaluation.hpp"
#include "tdg/graph.hpp"
#include "tdg/loss.hpp"
#include "tdg/scorer.hpp"
#include "tdg/synth.hpp"
#include "tdg/training.hpp"
