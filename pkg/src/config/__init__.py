"""配置：常量、运行配置与日志。"""
