#pragma once

#include "lcgan/checkpoint.hpp"
#include "lcgan/config.hpp"
#include "lcgan/data.hpp"
#include "lcgan/engine.hpp"
#include "lcgan/error.hpp"
#include "lcgan/image_io.hpp"
#include "lcgan/layers.hpp"
#include "lcgan/losses.hpp"
#include "lcgan/metrics.hpp"
#include "lcgan/nets.hpp"
#include "lcgan/optim.hpp"
#include "lcgan/prepare.hpp"
#include "lcgan/random.hpp"
#include "lcgan/synth.hpp"
#include "lcgan/taxonomy.hpp"
#include "lcgan/tensor.hpp"
#include "lcgan/tile_io.hpp"
#include "lcgan/version.hpp"
