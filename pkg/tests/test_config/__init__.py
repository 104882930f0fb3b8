"""config 层测试。"""
