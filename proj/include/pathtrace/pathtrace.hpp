#pragma once

#include "codes.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "digest.hpp"
#include "error.hpp"
#include "graph.hpp"
#include "harness.hpp"
#include "hexfloat.hpp"
#include "matrix_io.hpp"
#include "parallel.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "similarity.hpp"
#include "stats.hpp"
#include "toy_model.hpp"
#include "tracer.hpp"
#include "transforms.hpp"
#include "wire.hpp"
