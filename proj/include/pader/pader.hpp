#pragma once

#include "pader/bench.hpp"
#include "pader/circuit.hpp"
#include "pader/data.hpp"
#include "pader/paillier.hpp"
#include "pader/packing.hpp"
#include "pader/session.hpp"
#include "pader/soreg.hpp"
#include "pader/trainer.hpp"
#include "pader/transport.hpp"
