#ifndef VINECAL_VINECAL_HPP
#define VINECAL_VINECAL_HPP

#include "vinecal/normal.hpp"
#include "vinecal/special.hpp"
#include "vinecal/rng.hpp"
#include "vinecal/model.hpp"
#include "vinecal/vine.hpp"
#include "vinecal/variational.hpp"
#include "vinecal/optimizer.hpp"
#include "vinecal/mh.hpp"
#include "vinecal/prediction.hpp"
#include "vinecal/design.hpp"
#include "vinecal/simulation.hpp"
#include "vinecal/ldm.hpp"
#include "vinecal/io.hpp"
#include "vinecal/cli.hpp"

#endif  // VINECAL_VINECAL_HPP
