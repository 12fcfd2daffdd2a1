#pragma once

#include "segmap/config.hpp"
#include "segmap/descriptor.hpp"
#include "segmap/error.hpp"
#include "segmap/evaluation.hpp"
#include "segmap/geometry.hpp"
#include "segmap/hull.hpp"
#include "segmap/io.hpp"
#include "segmap/lie.hpp"
#include "segmap/localization.hpp"
#include "segmap/pipeline.hpp"
#include "segmap/pose_graph.hpp"
#include "segmap/preprocess.hpp"
#include "segmap/reconstruction.hpp"
#include "segmap/segment_map.hpp"
#include "segmap/segmentation.hpp"
#include "segmap/semantics.hpp"
#include "segmap/voxel_map.hpp"
