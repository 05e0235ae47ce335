#pragma once

#include "pathoattack/attack.hpp"
#include "pathoattack/bridge.hpp"
#include "pathoattack/campaign.hpp"
#include "pathoattack/config.hpp"
#include "pathoattack/core.hpp"
#include "pathoattack/fixture.hpp"
#include "pathoattack/image_io.hpp"
#include "pathoattack/ingest.hpp"
#include "pathoattack/metrics.hpp"
#include "pathoattack/model.hpp"
#include "pathoattack/render.hpp"
