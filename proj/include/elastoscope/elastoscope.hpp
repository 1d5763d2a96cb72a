#pragma once

#include "elastoscope/beamformer.hpp"
#include "elastoscope/core/array2d.hpp"
#include "elastoscope/core/error.hpp"
#include "elastoscope/core/grid.hpp"
#include "elastoscope/core/parallel.hpp"
#include "elastoscope/evaluation.hpp"
#include "elastoscope/fft.hpp"
#include "elastoscope/io/config.hpp"
#include "elastoscope/io/formats.hpp"
#include "elastoscope/phantom.hpp"
#include "elastoscope/registration.hpp"
#include "elastoscope/rf_synth.hpp"
#include "elastoscope/transducer.hpp"
#include "elastoscope/xcorr.hpp"
