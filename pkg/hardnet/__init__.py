# HardNet package
