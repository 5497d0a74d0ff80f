#pragma once

#include "qd/archive.hpp"
#include "qd/cma_es.hpp"
#include "qd/csv.hpp"
#include "qd/density.hpp"
#include "qd/discount_model.hpp"
#include "qd/domains.hpp"
#include "qd/errors.hpp"
#include "qd/experiment.hpp"
#include "qd/kdtree.hpp"
#include "qd/numerics.hpp"
#include "qd/schedulers.hpp"
