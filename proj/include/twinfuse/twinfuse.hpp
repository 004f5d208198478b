#pragma once

#include "twinfuse/error.hpp"
#include "twinfuse/geometry.hpp"
#include "twinfuse/se3.hpp"
#include "twinfuse/ply.hpp"
#include "twinfuse/fixtures.hpp"
#include "twinfuse/sim/scene.hpp"
#include "twinfuse/sim/scan_sim.hpp"
#include "twinfuse/sim/io.hpp"
#include "twinfuse/sim/dataset.hpp"
#include "twinfuse/slam/registration.hpp"
#include "twinfuse/slam/pose_graph.hpp"
#include "twinfuse/slam/voxel.hpp"
#include "twinfuse/slam/pipeline.hpp"
#include "twinfuse/fusion/bytes.hpp"
#include "twinfuse/fusion/record.hpp"
#include "twinfuse/fusion/spatial_index.hpp"
#include "twinfuse/fusion/wal.hpp"
#include "twinfuse/fusion/store.hpp"
#include "twinfuse/fusion/protocol.hpp"
#include "twinfuse/fusion/session.hpp"
#include "twinfuse/fusion/server.hpp"
#include "twinfuse/fusion/client.hpp"
#include "twinfuse/defect/defect_geo.hpp"
#include "twinfuse/eval/measure.hpp"
#include "twinfuse/eval/report.hpp"
