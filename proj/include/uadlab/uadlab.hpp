#pragma once

// Umbrella header.

#include "adam.hpp"
#include "autodiff.hpp"
#include "csv.hpp"
#include "dataset_io.hpp"
#include "errors.hpp"
#include "experiments.hpp"
#include "format.hpp"
#include "gradcheck.hpp"
#include "json_util.hpp"
#include "latent.hpp"
#include "metrics.hpp"
#include "phantom.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "svg.hpp"
#include "tensor.hpp"
#include "training.hpp"
#include "vae.hpp"
