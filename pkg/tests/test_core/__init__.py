"""core 层测试。"""
