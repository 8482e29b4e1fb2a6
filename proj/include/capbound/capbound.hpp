#pragma once

#include "activation.hpp"
#include "capacity.hpp"
#include "dense_net.hpp"
#include "io.hpp"
#include "margins.hpp"
#include "model_spec.hpp"
#include "oracle.hpp"
#include "rng.hpp"
#include "spec_config.hpp"
#include "text_util.hpp"
#include "version.hpp"
